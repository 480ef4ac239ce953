__version__ = "0.1.0"

import jax

# float64 everywhere
jax.config.update("jax_enable_x64", True)

from previewmpc.errors import *
from previewmpc.tree_object import *
from previewmpc.types import *
from previewmpc.polytope import *
from previewmpc.model import *
from previewmpc.config import *
from previewmpc.synthesis import *
from previewmpc.ocp import *
from previewmpc.controllers import *
from previewmpc.harness import *

from . import solvers
from .solvers import *
