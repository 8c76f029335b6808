"""
Models package
Import tất cả models để SQLAlchemy có thể tạo tables
"""
from app.models.run_record import RunRecord
from app.models.session_record import SessionRecord

__all__ = [
    "RunRecord",
    "SessionRecord",
]
