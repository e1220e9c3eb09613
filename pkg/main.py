import io
import logging
import os
import time
from typing import Optional

import numpy as np
from dotenv import load_dotenv
from fastapi import APIRouter, FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware

from analysis.csv_reader import read_trapping_series
from cli import cmd_bath_spectrum
from config import VERSION, configure_logging, parse_manifest
from errors import ScatterSimError
from observables import fit_rate
from units import Dimension, atomic

# Load environment variables
load_dotenv()
configure_logging(os.getenv("SCATTERSIM_LOG_LEVEL", "INFO").upper())
logger = logging.getLogger(__name__)

router = APIRouter()

app = FastAPI(
    title="scattersim API",
    description="Rate refits, bath audits and manifest validation for atom-surface scattering runs.",
    version=VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

MAX_UPLOAD_BYTES = 20 * 1024 * 1024


async def _read_text(file: UploadFile, allowed: tuple) -> str:
    if not file.filename:
        raise HTTPException(status_code=400, detail="No file provided")
    ext = file.filename.rsplit(".", 1)[-1].lower() if "." in file.filename else ""
    if ext not in allowed:
        raise HTTPException(status_code=400, detail=f"Unsupported file type. Use: {', '.join(allowed)}")
    payload = await file.read()
    if len(payload) > MAX_UPLOAD_BYTES:
        raise HTTPException(status_code=400, detail="File too large")
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail="File must be UTF-8 text")


@router.get("/")
def root():
    return {
        "message": "scattersim API",
        "version": VERSION,
        "endpoints": ["/health", "/fit-rate/", "/bath-spectrum/", "/resolve/"],
    }


@router.get("/health")
def health_check():
    return {"status": "healthy", "timestamp": time.time(), "version": VERSION}


@router.post("/fit-rate/")
async def fit_rate_endpoint(
    file: UploadFile = File(...),
    window_lo_ps: float = Form(40.0),
    window_hi_ps: float = Form(60.0),
):
    text = await _read_text(file, ("csv",))
    try:
        series = read_trapping_series(io.StringIO(text))
        window = (atomic(window_lo_ps, Dimension.TIME, "ps"), atomic(window_hi_ps, Dimension.TIME, "ps"))
        return fit_rate(series, window).to_dict()
    except ScatterSimError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception("rate fit failed")
        raise HTTPException(status_code=500, detail=f"Rate fit failed: {str(e)}")


@router.post("/bath-spectrum/")
async def bath_spectrum(file: Optional[UploadFile] = File(None)):
    try:
        text = await _read_text(file, ("env", "txt", "cfg")) if file is not None else ""
        frame = cmd_bath_spectrum(parse_manifest(text))
        return {"rows": frame.replace({np.nan: None}).to_dict(orient="records")}
    except ScatterSimError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/resolve/")
async def resolve(file: UploadFile = File(...)):
    text = await _read_text(file, ("env", "txt", "cfg"))
    try:
        manifest = parse_manifest(text)
    except ScatterSimError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"resolved": manifest.resolved(), "manifest": manifest.echo}


app.include_router(router)

if __name__ == "__main__":
    import uvicorn
    port = int(os.environ.get("PORT", 8000))
    uvicorn.run(app, host="0.0.0.0", port=port)
