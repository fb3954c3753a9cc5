import os
import sys

# flat top-level packages (config, core, integrations, utils, cli) import without installation
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
