# resources/runs.py
from __future__ import annotations

from fastapi import APIRouter, HTTPException

from frameworks.settings import get_settings
from models.errors import DataFormatError
from models.records import RunRecord, RunSummary
from services.report_service import load_records, read_metrics, read_run

router = APIRouter()


@router.get("/runs", response_model=list[RunSummary])
def list_runs():
    """
    Summaries of every complete run record in the output directory.
    Partial-run markers are not listed.
    """
    try:
        records = load_records(get_settings().output_dir)
        return [RunSummary.from_record(r) for r in records]

    except FileNotFoundError:
        return []
    except DataFormatError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to list runs: {str(e)}")


@router.get("/runs/{run_id}", response_model=RunRecord)
def get_run(run_id: str):
    """Full record of one run."""
    try:
        return read_run(get_settings().output_dir, run_id)

    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except DataFormatError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to read run {run_id}: {str(e)}")


@router.get("/metrics", response_model=list[dict[str, str]])
def get_metrics():
    """Rows of the latest metrics CSV, values as written."""
    try:
        return read_metrics(get_settings().output_dir)

    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to read metrics: {str(e)}")
