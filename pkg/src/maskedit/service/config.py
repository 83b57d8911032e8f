"""Service settings from environment variables or explicit construction."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class Settings:
    store_path: Path = Path("./maskedit-store")
    backend: str = "toy"
    workers: int = 1
    max_upload_bytes: int = 16 * 1024 * 1024
    cors_origins: tuple[str, ...] = ("*",)
    idempotency_ttl_s: float = 3600.0
    ui_dist: Path | None = None
    port: int = 8321

    @classmethod
    def from_env(cls, **overrides) -> "Settings":
        env = os.environ
        kwargs = dict(
            store_path=Path(env.get("MASKEDIT_STORE", "./maskedit-store")),
            backend=env.get("MASKEDIT_BACKEND", "toy"),
            workers=int(env.get("MASKEDIT_WORKERS", "1")),
            max_upload_bytes=int(env.get("MASKEDIT_MAX_UPLOAD", str(16 * 1024 * 1024))),
            cors_origins=tuple(env.get("MASKEDIT_CORS_ORIGINS", "*").split(",")),
            idempotency_ttl_s=float(env.get("MASKEDIT_IDEMPOTENCY_TTL", "3600")),
            ui_dist=Path(env["MASKEDIT_UI_DIST"]) if env.get("MASKEDIT_UI_DIST") else None,
            port=int(env.get("MASKEDIT_PORT", "8321")),
        )
        kwargs.update(overrides)
        return cls(**kwargs)
