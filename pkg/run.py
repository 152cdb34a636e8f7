import logging
import sys

from app.cli import main
from app.config import settings

logging.basicConfig(level=settings.log_level.upper(), format="%(levelname)-5s [%(name)s] %(message)s")

if __name__ == "__main__":
    sys.exit(main())
