# models/health.py
"""
Health check Pydantic models for monitoring endpoints.
"""
from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class HealthCheckResponse(BaseModel):
    """Response model for the health check endpoint."""

    status: str = Field("ok", description="Health status indicator")
    service: str = Field("rdac-results", description="Service name")
    version: str = Field(..., description="Package version")
    output_dir: str = Field(..., description="Directory whose runs are served")
    runs: int = Field(..., ge=0, description="Number of complete run records found")

    model_config = ConfigDict(
        json_schema_extra={
            "examples": [
                {"status": "ok", "service": "rdac-results", "version": "0.1.0", "output_dir": "runs", "runs": 12}
            ]
        }
    )
