import sys
from pathlib import Path

# the plot script lives next to this file, not on any install path
sys.path.insert(0, str(Path(__file__).parent))
