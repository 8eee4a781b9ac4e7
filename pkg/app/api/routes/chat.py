"""
Chat-completion route of the mock endpoint
"""
from typing import List, Optional

from fastapi import APIRouter, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

router = APIRouter()


class ChatMessageIn(BaseModel):
    role: str
    content: str


class ChatCompletionIn(BaseModel):
    model: str
    messages: List[ChatMessageIn]
    temperature: Optional[float] = None
    max_tokens: Optional[int] = None


@router.post("/v1/chat/completions")
async def chat_completions(body: ChatCompletionIn, request: Request):
    """Answer from the scripted responder installed on the app"""
    responder = request.app.state.responder
    status, payload = responder.respond(body.model_dump())
    return JSONResponse(payload, status_code=status)


@router.get("/health")
async def health(request: Request):
    return {"status": "ok", "scripted_answers": len(request.app.state.responder)}
