from .logging_config import get_logger
