from pydantic import BaseModel

from app.models.resource import EntityKind


class ContractArgument(BaseModel):
    name: str
    type: str = "string"
    description: str = ""


class ContractSection(BaseModel):
    name: str
    version: str
    description: str = ""
    arguments: list[ContractArgument] = []
    preconditions: list[str] = []
    constraints: list[str] = []


class Contract(BaseModel):
    kind: EntityKind
    sections: list[ContractSection] = []
