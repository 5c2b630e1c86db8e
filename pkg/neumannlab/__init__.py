from neumannlab.base import *
from neumannlab.registry import *
from neumannlab.nonlinearity import *
from neumannlab.solver import *
from neumannlab.mismatch import *
from neumannlab.asymptotics import *
from neumannlab.rstar import *
