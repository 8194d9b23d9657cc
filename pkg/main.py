from __future__ import annotations

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from frameworks.settings import get_settings
from models.health import HealthCheckResponse

# Routers
from resources import runs
from services.report_service import load_records

VERSION = "0.1.0"

# ------------------------------------------------------------------------------
# App initialization
# ------------------------------------------------------------------------------


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Lifespan context manager for startup and shutdown.
    """
    # Startup
    logging.info(f"Results service starting up, serving {get_settings().output_dir}")

    yield

    # Shutdown
    logging.info("Results service shutting down.")


app = FastAPI(
    title="RDAC Results",
    version=VERSION,
    description=(
        "Read-only access to continual-learning run records, metrics tables "
        "and case labels produced by the rdac command line."
    ),
    lifespan=lifespan,
)

# ------------------------------------------------------------------------------
# CORS Configuration
# ------------------------------------------------------------------------------

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET"],
    allow_headers=["*"],
)

# ------------------------------------------------------------------------------
# Routes
# ------------------------------------------------------------------------------

app.include_router(runs.router, tags=["runs"])

# ------------------------------------------------------------------------------
# Healthcheck
# ------------------------------------------------------------------------------


@app.get("/", response_model=HealthCheckResponse, tags=["health"])
def root():
    output_dir = get_settings().output_dir
    try:
        count = len(load_records(output_dir))
    except (FileNotFoundError, ValueError):
        count = 0
    return HealthCheckResponse(version=VERSION, output_dir=str(output_dir), runs=count)
