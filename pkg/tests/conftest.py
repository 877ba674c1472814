import sys
from pathlib import Path

# Test modules import shared builders as plain modules (helpers, fixtures).
sys.path.insert(0, str(Path(__file__).resolve().parent))
