"""
First-contact stiffness estimation: synthesis, conditioning, detection, learning and streaming.
"""
