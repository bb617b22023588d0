"""Regenerate tests/data/gdn_golden.npz: a float64 sequential GDN run (d=8, L=32).

Inputs and cell parameters are stored with the outputs so the fixture does not
depend on the RNG stream of any particular torch release.
"""
from pathlib import Path

import numpy as np
import torch

from had.gdn import GdnCell, gdn_forward_sequential


def main(out: Path = Path(__file__).resolve().parents[1] / "tests" / "data" / "gdn_golden.npz"):
    torch.manual_seed(20240611)
    cell = GdnCell(8, 8, 8).double()
    x = torch.randn(32, 8, dtype=torch.float64)
    with torch.no_grad():
        o, S = gdn_forward_sequential(x, cell)
    arrays = {f"param.{n}": p.detach().numpy() for n, p in cell.named_parameters()}
    np.savez(out, x=x.numpy(), out=o.numpy(), state=S.numpy(), **arrays)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
