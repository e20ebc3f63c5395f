import sys

from syndist.cli import main

sys.exit(main())
