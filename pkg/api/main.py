from collections import Counter
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from loguru import logger

from api.models.allotment import FixtureDefects
from api.routes import admin, allotments
from config.settings import FIXTURE_DB_PATH
from database.sqlite_client import SQLiteClient

STATS_PATH = "/__fixture/stats"


def create_app(db_path: str = FIXTURE_DB_PATH, defects: Optional[FixtureDefects] = None) -> FastAPI:
    """Inventory service used as the system under test in integration runs."""
    app = FastAPI(title="Inventory fixture service", version="1.0.0")
    app.state.store = SQLiteClient(db_path)
    app.state.defects = defects or FixtureDefects()
    app.state.request_counts = Counter()
    enabled = [name for name, on in app.state.defects.model_dump().items() if on]
    logger.info(f"Fixture service on {db_path}, defects: {', '.join(enabled) or 'none'}")

    @app.middleware("http")
    async def count_requests(request: Request, call_next):
        if request.url.path != STATS_PATH:
            app.state.request_counts[f"{request.method} {request.url.path}"] += 1
        return await call_next(request)

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        logger.warning(f"{request.method} {request.url.path} rejected: {problems}")
        return JSONResponse(status_code=400, content={"detail": problems})

    app.include_router(allotments.router)
    app.include_router(admin.router)
    return app
