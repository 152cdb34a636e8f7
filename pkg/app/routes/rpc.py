"""Control-plane endpoints: one JSON-RPC endpoint plus the method catalogue."""

import json

from fastapi import APIRouter, Request
from starlette.concurrency import run_in_threadpool

from app.services.rpc import catalogue, dispatch, parse_error_response

router = APIRouter(tags=["control-plane"])


@router.post("/rpc")
async def rpc(request: Request):
    raw = await request.body()
    try:
        body = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        return parse_error_response(str(e)).wire()
    if not isinstance(body, dict):
        return parse_error_response("request must be a JSON object").wire()
    # registry calls are blocking; keep the event loop free for concurrent requests
    response = await run_in_threadpool(dispatch, request.app.state.substrate, body)
    return response.wire()


@router.get("/catalogue")
async def get_catalogue():
    return {"methods": [entry.model_dump() for entry in catalogue()]}


@router.get("/health")
async def health_check(request: Request):
    substrate = request.app.state.substrate
    return {
        "status": "ok",
        "resources": {reg.kind.value: len(reg.list()) for reg in substrate.registries()},
    }
