from fastapi import APIRouter, Request

from api.models.allotment import FixtureStats

router = APIRouter()


@router.get("/__fixture/stats", response_model=FixtureStats, include_in_schema=False)
def fixture_stats(request: Request):
    """Request counts per 'METHOD path' and resets seen by the database."""
    return FixtureStats(
        requests=dict(request.app.state.request_counts),
        resets=request.app.state.store.reset_count(),
    )
