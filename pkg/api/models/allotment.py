from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, StrictInt

DATE_PATTERN = r"^\d{4}-\d{2}-\d{2}$"


class FixtureDefects(BaseModel):
    """Seeded bugs the fixture service can be switched into."""

    accept_inverted_dates: bool = False
    accept_non_string_room_type: bool = False
    crash_on_non_string_room_type: bool = False

    @classmethod
    def parse(cls, text: Optional[str]) -> "FixtureDefects":
        """Comma separated defect names, e.g. 'accept_inverted_dates,crash_on_non_string_room_type'."""
        names = [name.strip() for name in (text or "").split(",") if name.strip()]
        unknown = [name for name in names if name not in cls.model_fields]
        if unknown:
            raise ValueError(f"Unknown fixture defects: {', '.join(unknown)}")
        return cls(**{name: True for name in names})


class AllotmentRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    # checked by the route so the type defects can be switched on
    room_type_id: Any
    date_from: str = Field(alias="from", pattern=DATE_PATTERN)
    until: str = Field(pattern=DATE_PATTERN)
    count: StrictInt = Field(ge=1, le=10)
    note: Optional[str] = Field(default=None, max_length=200)


class Allotment(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    id: int
    room_type_id: str
    date_from: str = Field(alias="from")
    until: str
    count: int
    note: Optional[str] = None


class MaintenanceWindowRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    room_type_id: str
    date_from: str = Field(alias="from", pattern=DATE_PATTERN)
    until: str = Field(pattern=DATE_PATTERN)


class FixtureStats(BaseModel):
    requests: dict[str, int]
    resets: int
