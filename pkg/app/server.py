"""
server.py - FastAPI control plane and its in-process runner

Provides:
- create_app(substrate) -> FastAPI
- serve(bind_address, substrate) -> ServerHandle (uvicorn in a background thread)
"""

import logging
import socket
import threading
import time
import traceback
from typing import Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.config import settings
from app.models.rpc import RpcError, RpcResponse
from app.routes.rpc import router as rpc_router
from app.services.errors import BindError, ConfigError
from app.services.registry import ResourceSubstrate
from app.services.rpc import RPC_INTERNAL_ERROR

logger = logging.getLogger(__name__)


def create_app(substrate: Optional[ResourceSubstrate] = None) -> FastAPI:
    app = FastAPI(title="Agent Evolution Control Plane")
    app.state.substrate = substrate or ResourceSubstrate()

    @app.exception_handler(Exception)
    async def unhandled_exception_handler(request: Request, exc: Exception):
        logger.error("Unhandled exception on %s %s:\n%s", request.method, request.url.path, traceback.format_exc())
        body = RpcResponse(error=RpcError(code=RPC_INTERNAL_ERROR, message="internal error", data={"kind": type(exc).__name__}))
        return JSONResponse(status_code=500, content=body.wire())

    app.include_router(rpc_router)
    return app


def parse_bind_address(bind_address: str) -> tuple[str, int]:
    host, sep, port = bind_address.rpartition(":")
    if not sep:
        host, port = bind_address, str(settings.port)
    try:
        return host or settings.host, int(port)
    except ValueError:
        raise ConfigError(f"bad bind address {bind_address!r}", {"bind": bind_address})


class ServerHandle:
    """A running control plane. shutdown() lets in-flight requests finish."""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread, sock: socket.socket):
        self._server = server
        self._thread = thread
        self._socket = sock
        self.host, self.port = sock.getsockname()[:2]

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def running(self) -> bool:
        return self._thread.is_alive()

    def wait(self) -> None:
        while self._thread.is_alive():
            self._thread.join(timeout=0.5)

    def shutdown(self, timeout: float = 10.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=timeout)
        self._socket.close()
        logger.info("control plane on %s stopped", self.url)


def serve(bind_address: str, substrate: ResourceSubstrate, startup_timeout: float = 10.0) -> ServerHandle:
    """Bind first (so address errors surface here), then run uvicorn on the bound socket."""
    host, port = parse_bind_address(bind_address)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as e:
        sock.close()
        raise BindError(f"cannot bind {host}:{port}: {e}", {"host": host, "port": port})
    sock.listen(128)

    config = uvicorn.Config(create_app(substrate), log_level=settings.log_level.lower(), lifespan="off")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, name="control-plane", daemon=True)
    thread.start()

    deadline = time.monotonic() + startup_timeout
    while not server.started:
        if not thread.is_alive() or time.monotonic() > deadline:
            server.should_exit = True
            sock.close()
            raise BindError(f"control plane did not start on {host}:{port}", {"host": host, "port": port})
        time.sleep(0.02)
    handle = ServerHandle(server, thread, sock)
    logger.info("control plane listening on %s", handle.url)
    return handle
