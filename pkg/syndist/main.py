"""FastAPI application entrypoint for syndist.

Exposes experiment submission and the oracle suite over HTTP. Run with
``python -m syndist serve`` or ``uvicorn syndist.main:app``.
"""

import logging

from fastapi import FastAPI

from syndist import __version__
from syndist.api.v1 import routes as v1_routes
from syndist.config import LOG_FORMAT, get_settings

logging.basicConfig(level=get_settings().log_level, format=LOG_FORMAT)
logger = logging.getLogger(__name__)

app = FastAPI(title="syndist", version=__version__)


@app.on_event("startup")
async def on_startup() -> None:
    settings = get_settings()
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"syndist {__version__} writing artifacts under {settings.out_dir} with {settings.threads} threads")


app.include_router(v1_routes.router)
