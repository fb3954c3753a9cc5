import os
from dotenv import load_dotenv

load_dotenv()

# ── Logging ───────────────────────────────────────────────────────────────────
LOG_LEVEL = os.getenv("REUSE_RISK_LOG_LEVEL", "INFO")

# ── Run defaults ──────────────────────────────────────────────────────────────
WORKDIR = os.getenv("REUSE_RISK_WORKDIR", "runs/default")
ROOT_SEED = int(os.getenv("REUSE_RISK_SEED", "0"))
WORKERS = int(os.getenv("REUSE_RISK_WORKERS", "1"))
