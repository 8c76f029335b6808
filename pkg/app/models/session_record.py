from sqlalchemy import String, Integer, Float, Index
from sqlalchemy.orm import Mapped, mapped_column
from app.core.database import Base


class SessionRecord(Base):
    """One evaluated task in one session of one run (method × seed)"""
    __tablename__ = "session_records"

    # Primary Key - insertion order is the task order of the report
    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)

    # Fields
    method: Mapped[str] = mapped_column(String(32), nullable=False)
    session: Mapped[int] = mapped_column(Integer, nullable=False)
    task_id: Mapped[str] = mapped_column(String(128), nullable=False)
    success_rate: Mapped[float] = mapped_column(Float, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    shots: Mapped[int] = mapped_column(Integer, nullable=False)
    episodes: Mapped[int] = mapped_column(Integer, nullable=False)

    __table_args__ = (
        Index("ix_session_records_run", "method", "seed", "session"),
    )

    def __repr__(self):
        return (
            f"<SessionRecord(method={self.method}, session={self.session}, "
            f"task_id={self.task_id}, rate={self.success_rate:.3f})>"
        )
