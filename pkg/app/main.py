import logging
from typing import Optional

from fastapi import FastAPI

from app.api.routes import chat
from app.services.mock_llm import ScriptedResponder

logger = logging.getLogger(__name__)


def create_app(responder: Optional[ScriptedResponder] = None) -> FastAPI:
    """Mock chat-completion endpoint serving scripted answers"""
    app = FastAPI(
        title="KG Probe mock endpoint",
        description="Scripted chat-completion endpoint for offline evaluation runs",
        version="1.0.0",
    )
    app.state.responder = responder or ScriptedResponder()
    app.include_router(chat.router, tags=["chat"])
    logger.info("Mock endpoint ready with %d scripted answers", len(app.state.responder))
    return app


if __name__ == "__main__":
    import uvicorn

    from app.core.config import settings

    uvicorn.run(create_app(), host=settings.MOCK_HOST, port=settings.MOCK_PORT)
