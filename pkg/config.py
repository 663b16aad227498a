import logging
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
env_path = os.path.join(os.path.dirname(__file__), ".env")
load_dotenv(env_path)


# Data and output locations
DATA_DIR = Path(os.getenv("TA_DATA_DIR") or os.path.join(os.path.dirname(__file__), "data"))
OUTPUT_DIR = Path(os.getenv("TA_OUTPUT_DIR") or "runs")

# All randomness derives from this seed unless a command overrides it
BASE_SEED = int(os.getenv("TA_BASE_SEED", "0"))

# Bundled networks: name -> (link file, trips file)
BUNDLED_NETWORKS = {
    "braess": ("braess.net", "braess.trips"),
    "braess4": ("braess4.net", "braess4.trips"),
    "ow": ("ow.net", "ow.trips"),
}


# Logging Configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()  # Default to INFO level
ENABLE_LOGGING = (
    os.getenv("ENABLE_LOGGING", "true").lower() == "true"
)  # Enable/disable logging


def bundled_files(name: str):
    """Paths of a bundled network, or None when the name is unknown."""
    if name not in BUNDLED_NETWORKS:
        return None
    net_file, trips_file = BUNDLED_NETWORKS[name]
    return DATA_DIR / net_file, DATA_DIR / trips_file


def setup_logging():
    """Configure logging for the application"""
    if not ENABLE_LOGGING:
        logging.disable(logging.CRITICAL)
        return

    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
