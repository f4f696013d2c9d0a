"""demoserve: wrap an inference backend behind a shareable web demo.

A declaratively configured interface (images, text, audio in; labels,
text, images out) is served locally, optionally published through a
relay coordinator as a share link, and captures collaborator feedback as
flagged samples.
"""

__version__ = "0.1.0"
