"""HDR tone mapping toolkit: classical operators, TMQI scoring, a learned operator and vote statistics."""

from .image import HdrImage, LdrImage, NormalizationMode, correct_color, luminance, normalize, reproduce_color
from .tmo import TmoId, apply_tmo, apply_tmo_color
from .tmqi import TmqiReport, tmqi

__version__ = "0.1.0"
