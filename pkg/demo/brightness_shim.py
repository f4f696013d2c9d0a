"""A tiny real backend: classifies an image as bright or dark.

Speaks the stdio protocol: prints READY, then answers one JSON line per
request.  Runs in its own process with its own dependencies, exactly like
a researcher's model shim would.
"""

import base64
import io
import json
import sys

from PIL import Image

print("READY", flush=True)

for line in sys.stdin:
    request = json.loads(line)
    outputs = []
    for value in request["data"]:
        raw = base64.b64decode(value.split(",", 1)[1])
        image = Image.open(io.BytesIO(raw)).convert("L")
        pixels = image.tobytes()
        bright = sum(pixels) / len(pixels) / 255.0
        outputs.append({"bright": bright, "dark": 1.0 - bright})
    print(json.dumps({"data": outputs}), flush=True)
