"""Wire types shared by the prompt builders and the model gateway."""

from __future__ import annotations

from dataclasses import dataclass, field


class MessageError(Exception):
    pass


@dataclass
class ChatPart:
    kind: str  # "text" | "image"
    text: str = ""
    data: bytes = b""
    mime: str = ""

    def __post_init__(self):
        if self.kind == "text":
            if not isinstance(self.text, str):
                raise MessageError("text part needs a string")
        elif self.kind == "image":
            if not self.data or not self.mime:
                raise MessageError("image part needs bytes and a mime type")
        else:
            raise MessageError(f"unknown part kind {self.kind!r}")

    @staticmethod
    def from_text(text: str) -> "ChatPart":
        return ChatPart(kind="text", text=text)

    @staticmethod
    def from_image(data: bytes, mime: str = "image/png") -> "ChatPart":
        return ChatPart(kind="image", data=data, mime=mime)


@dataclass
class ChatRequest:
    backend: str
    parts: list[ChatPart]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.parts:
            raise MessageError("request needs at least one part")


@dataclass
class ChatResponse:
    text: str
    backend: str
    usage: dict = field(default_factory=dict)
    cached: bool = False


@dataclass
class ImageGenRequest:
    prompt: str
    count: int = 1
    size: int = 64

    def __post_init__(self):
        if self.count < 1:
            raise MessageError("count must be >= 1")
        if not self.prompt:
            raise MessageError("prompt must be nonempty")
