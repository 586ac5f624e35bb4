"""Render one chart and print its linearized table.

Textless charts keep the header and labels but drop every value, so the
language model never sees numbers that are not printed on the image.

    python3 demos/chart_to_text.py [seed]
"""

import sys

from chartalign import chart_to_text, generate_spec, render
from chartalign.synth.render import save_png

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 4
spec = generate_spec(seed)
save_png(render(spec, 448), f"chart_{seed}.png")
print(f"{spec.chart_type}, textless={spec.textless}, wrote chart_{seed}.png")
print(chart_to_text(spec).text)
