# main.py

import logging

import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from knowledge import knowledge_router

from app.core.config import settings
from app.utils.logs import setup_logging

setup_logging()

log = logging.getLogger("kgpl")

app = FastAPI(
    title=settings.PROJECT_NAME,
    version=settings.PROJECT_VERSION,
    description=""" KGPL TEXT ENCODER SERVICE """,
)


origins = ["*"]
app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(knowledge_router)


@app.get("/")
def home():
    return {
        "Welcome": dict(
            title=settings.PROJECT_NAME,
            version=settings.PROJECT_VERSION,
            encoder_backend=settings.ENCODER_BACKEND,
        )
    }


@app.on_event("startup")
async def startup_event():
    log.info("INIT: encoder backend=%s", settings.ENCODER_BACKEND)


def serve(host: str = "0.0.0.0", port: int = 8000, reload: bool = False) -> None:
    uvicorn.run("main:app", host=host, port=port, reload=reload)


if __name__ == "__main__":
    serve(reload=True)
