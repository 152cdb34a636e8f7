import re
from functools import total_ordering
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict

from app.models.resource import RegistrationRecord

_VERSION_RE = re.compile(r"^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)$")


@total_ordering
class Version(BaseModel):
    """MAJOR.MINOR.PATCH, ordered component-wise."""

    model_config = ConfigDict(frozen=True)

    major: int
    minor: int
    patch: int

    @classmethod
    def parse(cls, text: str) -> "Version":
        match = _VERSION_RE.match(text or "")
        if not match:
            raise ValueError(f"invalid version string: {text!r}")
        return cls(major=int(match[1]), minor=int(match[2]), patch=int(match[3]))

    @classmethod
    def is_valid(cls, text: str) -> bool:
        return bool(_VERSION_RE.match(text or ""))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.major, self.minor, self.patch)

    def bump_patch(self) -> "Version":
        return Version(major=self.major, minor=self.minor, patch=self.patch + 1)

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}"

    def __lt__(self, other: "Version") -> bool:
        return self.as_tuple() < other.as_tuple()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self.as_tuple() == other.as_tuple()

    def __hash__(self) -> int:
        return hash(self.as_tuple())


class Snapshot(BaseModel):
    model_config = ConfigDict(frozen=True)

    resource_name: str
    version: str
    content_hash: str
    record: RegistrationRecord
    parent: Optional[str] = None
    created_at: str


class HistoryEntry(BaseModel):
    version: str
    content_hash: str
    created_at: str
    parent: Optional[str] = None


class FieldChange(BaseModel):
    path: str
    old: Any = None
    new: Any = None
