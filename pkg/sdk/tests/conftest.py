import sys
from pathlib import Path

here = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(here / "src"))
# the worker-side package, for the integration test
sys.path.insert(0, str(here.parent / "src"))
