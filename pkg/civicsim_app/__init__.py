# from .civicsim_modules.src.runner import *
# from .civicsim_modules.src.analytics_utils import *
