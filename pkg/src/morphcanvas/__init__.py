"""morphcanvas: a gaze-driven generative morphing canvas server.

Gaze samples stream in over TCP or WebSocket, a rolling temporal window
turns them into a heatmap mask, an inpainting backend repaints the masked
region, and recursive frame interpolation renders the change as a paced
morph streamed to viewer channels. Sessions can be reversed back to the
pristine canvas and archived to disk.
"""

__version__ = "0.1.0"
