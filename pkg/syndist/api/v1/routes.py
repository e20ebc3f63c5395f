"""API v1 routes for submitting experiments and running the oracle suite.

Experiments run in background tasks and are tracked in an in-process
registry; nothing is persisted beyond the artifacts each run writes.
"""

import logging
import threading
import uuid
from datetime import datetime
from typing import Dict, List

import pandas as pd
from fastapi import APIRouter, BackgroundTasks, HTTPException

from syndist.api.v1.schemas import CheckOut, ExperimentIn, ExperimentOut, VerifyIn, VerifyOut
from syndist.config import get_settings
from syndist.errors import ConfigError
from syndist.experiment import apply_overrides, preset, run_experiment
from syndist.schemas import ExperimentConfig
from syndist.verify import run_checks

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/v1", tags=["v1"])

_experiments: Dict[str, ExperimentOut] = {}
_lock = threading.Lock()


def _records(metrics: pd.DataFrame) -> List[dict]:
    """DataFrame rows as JSON-safe dicts (NaN becomes null)."""
    return metrics.astype(object).where(pd.notna(metrics), None).to_dict("records")


def _update(experiment_id: str, **changes) -> None:
    with _lock:
        _experiments[experiment_id] = _experiments[experiment_id].copy(update=changes)


@router.get("/health")
async def health() -> dict:
    """Health check endpoint."""
    return {"status": "ok", "service": "syndist"}


@router.post("/experiments", response_model=ExperimentOut, status_code=202)
async def submit_experiment(request: ExperimentIn, background_tasks: BackgroundTasks) -> ExperimentOut:
    """Validate the request, register it and schedule the runs in the background."""
    try:
        cfg = request.config if request.config is not None else preset(request.preset)
        cfg = apply_overrides(cfg, iterations=request.iterations, seed=request.seed, ablate=request.ablate)
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e

    experiment_id = uuid.uuid4().hex[:12]
    out_dir = get_settings().out_dir / "api" / experiment_id
    out = ExperimentOut(
        id=experiment_id, name=cfg.name, status="queued", created_at=datetime.utcnow(), out_dir=str(out_dir)
    )
    with _lock:
        _experiments[experiment_id] = out
    background_tasks.add_task(_run_experiment, experiment_id, cfg)
    logger.info(f"Queued experiment {experiment_id} ({cfg.name})")
    return out


def _run_experiment(experiment_id: str, cfg: ExperimentConfig) -> None:
    """Background task: run the experiment and record its outcome in the registry."""
    _update(experiment_id, status="running")
    try:
        result = run_experiment(cfg, out_dir=get_settings().out_dir / "api" / experiment_id)
        _update(
            experiment_id,
            status="done" if result.ok else "failed",
            finished_at=datetime.utcnow(),
            metrics=_records(result.metrics),
            failures=result.failures,
        )
        logger.info(f"Experiment {experiment_id} finished with {len(result.failures)} failed runs")
    except Exception as e:
        logger.error(f"Experiment {experiment_id} failed: {e}", exc_info=True)
        _update(experiment_id, status="failed", finished_at=datetime.utcnow(), error=str(e))


@router.get("/experiments", response_model=List[ExperimentOut])
async def list_experiments(limit: int = 100) -> List[ExperimentOut]:
    """Most recent experiments first."""
    limit = min(max(limit, 1), 1000)
    with _lock:
        items = sorted(_experiments.values(), key=lambda e: e.created_at, reverse=True)
    return items[:limit]


@router.get("/experiments/{experiment_id}", response_model=ExperimentOut)
async def get_experiment(experiment_id: str) -> ExperimentOut:
    with _lock:
        out = _experiments.get(experiment_id)
    if out is None:
        raise HTTPException(status_code=404, detail=f"experiment {experiment_id} not found")
    return out


@router.post("/verify", response_model=VerifyOut)
def verify(request: VerifyIn) -> VerifyOut:
    """Run the oracle suite synchronously (in the worker thread pool)."""
    try:
        results = run_checks(fd_tol=request.fd_tol)
    except Exception as e:
        logger.error(f"Oracle suite crashed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="oracle suite failed to run") from e
    checks = [CheckOut(name=r.name, passed=r.passed, detail=r.detail) for r in results]
    return VerifyOut(passed=all(c.passed for c in checks), checks=checks)
