"""Network modules: scorer, partial convolutions, inpainter, attributor."""
