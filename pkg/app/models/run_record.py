from sqlalchemy import String, Integer, Float
from sqlalchemy.orm import Mapped, mapped_column
from typing import Optional
from app.core.database import Base


class RunRecord(Base):
    """Run metadata; aggregates are never cached here, only recomputed from SessionRecord rows"""
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    method: Mapped[str] = mapped_column(String(32), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    shots: Mapped[int] = mapped_column(Integer, nullable=False)
    schedule_hash: Mapped[str] = mapped_column(String(64), nullable=False)
    config_hash: Mapped[str] = mapped_column(String(64), nullable=False)
    format_version: Mapped[int] = mapped_column(Integer, nullable=False)
    status: Mapped[str] = mapped_column(String(16), default="running")  # running, completed
    last_session: Mapped[int] = mapped_column(Integer, default=-1)
    lambda1: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    lambda2: Mapped[Optional[float]] = mapped_column(Float, nullable=True)

    def __repr__(self):
        return f"<RunRecord(method={self.method}, seed={self.seed}, status={self.status})>"
