from datetime import date
from typing import Optional

from fastapi import APIRouter, Depends, HTTPException, Query, Request
from loguru import logger

from api.models.allotment import Allotment, AllotmentRequest, FixtureDefects, MaintenanceWindowRequest
from database.sqlite_client import SQLiteClient

router = APIRouter()


def get_store(request: Request) -> SQLiteClient:
    return request.app.state.store


def get_defects(request: Request) -> FixtureDefects:
    return request.app.state.defects


def _parse_date(name: str, value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise HTTPException(status_code=400, detail=f"'{name}' is not a valid date: {value}")


def _checked(payload: AllotmentRequest, defects: FixtureDefects) -> tuple[str, str, str]:
    room_type_id = payload.room_type_id
    if not isinstance(room_type_id, str):
        if defects.crash_on_non_string_room_type:
            # seeded crash: string-only call on a non-string
            room_type_id = room_type_id.strip()
        elif defects.accept_non_string_room_type:
            room_type_id = str(room_type_id)
        else:
            raise HTTPException(status_code=400, detail="'room_type_id' must be a string")
    if not room_type_id:
        raise HTTPException(status_code=400, detail="'room_type_id' must not be empty")

    date_from = _parse_date("from", payload.date_from)
    until = _parse_date("until", payload.until)
    if until < date_from and not defects.accept_inverted_dates:
        raise HTTPException(status_code=400, detail="'until' must not be before 'from'")
    return room_type_id, payload.date_from, payload.until


@router.get("/ping")
def ping():
    return {"status": "ok"}


@router.post("/allotments", status_code=201, response_model=Allotment)
def create_allotment(
    payload: AllotmentRequest,
    store: SQLiteClient = Depends(get_store),
    defects: FixtureDefects = Depends(get_defects),
):
    logger.info(f"Creating allotment for room type {payload.room_type_id!r}")
    try:
        room_type_id, date_from, until = _checked(payload, defects)
        return store.create_allotment(room_type_id, date_from, until, payload.count, payload.note)
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Error creating allotment: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Failed to create allotment: {str(e)}")


@router.get("/allotments", response_model=list[Allotment])
def list_allotments(
    room_type_id: Optional[str] = Query(default=None),
    limit: int = Query(default=100, ge=1, le=100),
    store: SQLiteClient = Depends(get_store),
):
    return store.list_allotments(room_type_id, limit)


@router.get("/allotments/{allotment_id}", response_model=Allotment)
def get_allotment(allotment_id: int, store: SQLiteClient = Depends(get_store)):
    allotment = store.get_allotment(allotment_id)
    if allotment is None:
        raise HTTPException(status_code=404, detail=f"Allotment {allotment_id} not found")
    return allotment


@router.put("/allotments/{allotment_id}", response_model=Allotment)
def update_allotment(
    allotment_id: int,
    payload: AllotmentRequest,
    store: SQLiteClient = Depends(get_store),
    defects: FixtureDefects = Depends(get_defects),
):
    logger.info(f"Updating allotment {allotment_id}")
    try:
        room_type_id, date_from, until = _checked(payload, defects)
        allotment = store.update_allotment(allotment_id, room_type_id, date_from, until, payload.count, payload.note)
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Error updating allotment {allotment_id}: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Failed to update allotment: {str(e)}")
    if allotment is None:
        raise HTTPException(status_code=404, detail=f"Allotment {allotment_id} not found")
    return allotment


@router.post("/maintenance-windows", status_code=201)
def create_maintenance_window(payload: MaintenanceWindowRequest):
    logger.warning(f"Rejecting maintenance window for {payload.room_type_id}")
    raise HTTPException(status_code=400, detail="Maintenance windows are closed for booking")


@router.get("/crash")
def crash():
    logger.error("Seeded crash endpoint called")
    raise HTTPException(status_code=500, detail="Seeded internal error")
