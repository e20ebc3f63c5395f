"""Async API tests using httpx and pytest-asyncio."""

import asyncio
from typing import AsyncGenerator

import pytest
import pytest_asyncio
from httpx import ASGITransport, AsyncClient

from syndist.main import app


@pytest_asyncio.fixture
async def client() -> AsyncGenerator[AsyncClient, None]:
    """Create a test client bound to the ASGI app."""
    async with AsyncClient(transport=ASGITransport(app=app), base_url="http://test") as ac:
        yield ac


async def _wait_for(client: AsyncClient, experiment_id: str, attempts: int = 50) -> dict:
    for _ in range(attempts):
        body = (await client.get(f"/v1/experiments/{experiment_id}")).json()
        if body["status"] in ("done", "failed"):
            return body
        await asyncio.sleep(0.1)
    raise AssertionError(f"experiment {experiment_id} did not finish")


@pytest.mark.asyncio
async def test_health(client: AsyncClient) -> None:
    """Test health check endpoint."""
    response = await client.get("/v1/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "service": "syndist"}


@pytest.mark.asyncio
async def test_submit_and_list(client: AsyncClient) -> None:
    """Test experiment submission, polling and listing."""
    post_resp = await client.post("/v1/experiments", json={"preset": "static-plane", "iterations": 0})
    assert post_resp.status_code == 202
    body = post_resp.json()
    assert body["name"] == "static-plane"
    assert body["status"] in ("queued", "running", "done")
    assert "id" in body

    done = await _wait_for(client, body["id"])
    assert done["status"] == "done"
    assert done["failures"] == []
    assert len(done["metrics"]) == 1
    assert done["metrics"][0]["iterations"] == 0

    list_resp = await client.get("/v1/experiments")
    assert list_resp.status_code == 200
    assert body["id"] in [e["id"] for e in list_resp.json()]


@pytest.mark.asyncio
async def test_inline_config_failure_is_reported(client: AsyncClient, camera_config) -> None:
    """An experiment whose scene cannot render finishes as failed."""
    config = {"name": "behind", "scene": {"camera": camera_config.dict(), "planes": [{"offset": -5.0}]}}
    post_resp = await client.post("/v1/experiments", json={"config": config, "iterations": 0})
    assert post_resp.status_code == 202
    done = await _wait_for(client, post_resp.json()["id"])
    assert done["status"] == "failed"
    assert len(done["failures"]) == 1


@pytest.mark.asyncio
async def test_invalid_requests(client: AsyncClient, camera_config) -> None:
    """Test validation errors and unknown ids."""
    assert (await client.post("/v1/experiments", json={})).status_code == 422
    assert (await client.post("/v1/experiments", json={"preset": "nope"})).status_code == 422
    both = {"preset": "static-plane", "config": {"scene": {"camera": camera_config.dict()}}}
    assert (await client.post("/v1/experiments", json=both)).status_code == 422
    bad_ablate = {"preset": "static-plane", "ablate": ["warp_speed"]}
    assert (await client.post("/v1/experiments", json=bad_ablate)).status_code == 422
    assert (await client.get("/v1/experiments/missing")).status_code == 404


@pytest.mark.asyncio
async def test_verify(client: AsyncClient) -> None:
    """Test the oracle suite endpoint."""
    response = await client.post("/v1/verify", json={})
    assert response.status_code == 200
    body = response.json()
    assert body["passed"] is True
    assert all(c["passed"] for c in body["checks"])
    assert (await client.post("/v1/verify", json={"fd_tol": 0})).status_code == 422
