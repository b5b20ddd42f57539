"""
HTTP API for markovcea
Validates and runs model documents sent as TOML text
"""

from typing import Any, Dict, List, Optional

import pandas as pd
from fastapi import FastAPI
from pydantic import BaseModel, Field

from markovcea import MarkovCeaError, __version__
from markovcea.config import get_settings
from markovcea.errors import DocumentError
from markovcea.service import CohortModelService
from markovcea.uncertainty import ceac, evpi, psa_summary

app = FastAPI(
    title="markovcea",
    description="Markov cohort models and cost-effectiveness analysis",
    version=__version__,
)


class ModelRequest(BaseModel):
    document: str = Field(description="Model document (TOML text)")
    base_dir: Optional[str] = Field(
        default=".", description="Directory under the data root that relative data paths resolve against"
    )
    cycles: Optional[int] = Field(default=None, ge=1)
    method: Optional[str] = None
    thresholds: Optional[List[float]] = None


class DiagramRequest(ModelRequest):
    strategy: str


class PsaRequest(ModelRequest):
    draws: int = Field(ge=1, le=100000)
    seed: int = Field(ge=0)


def _service(request: ModelRequest) -> CohortModelService:
    """Load the request document; every data path must stay under the configured data root"""
    root = get_settings().data_root.resolve()
    base_dir = (root / (request.base_dir or ".")).resolve()
    if not base_dir.is_relative_to(root):
        raise DocumentError(f"base_dir is outside the data root: {request.base_dir}", file="<request>")
    return CohortModelService.from_text(request.document, base_dir=base_dir, root=root)


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    """Rows as JSON-safe dicts (NaN becomes null)"""
    return frame.astype(object).where(frame.notna(), None).to_dict(orient="records")


@app.get("/")
async def index():
    """Service description"""
    return {
        "name": "markovcea",
        "version": __version__,
        "endpoints": ["/validate", "/run", "/diagram", "/dsa", "/psa"],
    }


@app.post("/validate")
async def validate(request: ModelRequest):
    """Load a document and describe the model"""
    try:
        return {"success": True, "model": _service(request).validate()}
    except MarkovCeaError as e:
        return {"success": False, "error": str(e)}


@app.post("/run")
async def run(request: ModelRequest):
    """Deterministic run: totals, frontier and NMB"""
    try:
        service = _service(request)
        result = service.run(request.cycles, request.method)
        response = {
            "success": True,
            "cycles": result.cycles,
            "method": result.method.value,
            "totals": [t.model_dump() for t in result.totals()],
            "frontier": result.frontier().model_dump(mode="json"),
        }
        thresholds = request.thresholds or service.document.thresholds
        if thresholds:
            response["nmb"] = _records(result.nmb(thresholds))
        return response
    except MarkovCeaError as e:
        return {"success": False, "error": str(e)}


@app.post("/diagram")
async def diagram(request: DiagramRequest):
    """Transition diagram of one strategy as Graphviz DOT"""
    try:
        return {"success": True, "dot": _service(request).diagram(request.strategy)}
    except MarkovCeaError as e:
        return {"success": False, "error": str(e)}


@app.post("/dsa")
async def dsa(request: ModelRequest):
    """One-way deterministic sensitivity analysis"""
    try:
        table = _service(request).dsa(request.cycles, request.method)
        return {"success": True, "dsa": _records(table)}
    except MarkovCeaError as e:
        return {"success": False, "error": str(e)}


@app.post("/psa")
async def psa(request: PsaRequest):
    """Probabilistic sensitivity analysis: mean totals, frontier, CEAC and EVPI"""
    try:
        service = _service(request)
        result = service.psa(request.draws, request.seed, request.cycles, request.method)
        summary = psa_summary(result)
        thresholds = service.thresholds(request.thresholds)
        return {
            "success": True,
            "draws": result.draws,
            "totals": [t.model_dump() for t in summary.totals],
            "frontier": summary.frontier.model_dump(mode="json"),
            "ceac": _records(ceac(result, thresholds)),
            "evpi": _records(evpi(result, thresholds)),
        }
    except MarkovCeaError as e:
        return {"success": False, "error": str(e)}


if __name__ == "__main__":
    import uvicorn

    settings = get_settings()
    print(f"Starting markovcea API on http://{settings.api_host}:{settings.api_port}")
    uvicorn.run(app, host=settings.api_host, port=settings.api_port)
