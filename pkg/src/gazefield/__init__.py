"""Two-stage gaze following at desk scale.

A head crop and head position feed a direction pathway that predicts a
unit gaze direction; the direction is rasterized into multi-scale
direction fields; the fields concatenated with the scene image feed a
heatmap pathway whose argmax is the predicted gaze point. Everything is
differentiable end to end on a small reverse-mode tape.
"""

__version__ = "0.1.0"
