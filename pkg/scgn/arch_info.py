"""Define the canonical architectures and their tabled output sizes."""

from pathlib import Path

from scgn.core.layers import ShapeTriple

#: Directory of the packaged spec documents.
SPEC_DIR = Path(__file__).parent / "specs"

SPEC_FILES = {
    "vsn": "vsn.json",
    "vdn": "vdn.json",
    "vdn_shared": "vdn_shared.json",
    "disc": "disc.json",
}


def _rows(*rows: tuple[str, int, int, int]) -> list[tuple[str, ShapeTriple]]:
    return [(name, ShapeTriple(h, w, c)) for name, h, w, c in rows]


def _both_branches(
    rows: list[tuple[str, ShapeTriple]],
) -> list[tuple[str, ShapeTriple]]:
    return [
        (f"{name}_{side}", shape)
        for side in ("l", "r")
        for name, shape in rows
    ]


_SHARED_ENCODER = _rows(
    ("ec1", 224, 224, 32),
    ("ep1", 112, 112, 32),
    ("ec2", 112, 112, 64),
    ("ep2", 56, 56, 64),
    ("ec3", 56, 56, 128),
    ("ec4", 56, 56, 128),
    ("ec5", 56, 56, 128),
    ("ec6", 56, 56, 128),
)

_VDN_DECODER = _rows(
    ("ddc1", 28, 28, 128),
    ("ddc2", 56, 56, 64),
    ("ddc3", 112, 112, 32),
    ("ddc4", 224, 224, 16),
    ("ddc5", 224, 224, 3),
)

#: Output sizes of the view synthesis network at resolution 224.
VSN_TABLE = _both_branches(_SHARED_ENCODER) + _rows(
    ("dc1", 56, 56, 128),
    ("up1", 56, 56, 128),
    ("dc2", 56, 56, 64),
    ("up2", 112, 112, 64),
    ("dc3", 112, 112, 32),
    ("up3", 224, 224, 32),
    ("dc4", 224, 224, 32),
    ("dc5", 224, 224, 3),
)

#: Output sizes of the view decomposition network at resolution 224.
VDN_TABLE = (
    _rows(
        ("dec1", 112, 112, 16),
        ("dec2", 56, 56, 32),
        ("dec3", 28, 28, 64),
        ("dec4", 14, 14, 128),
        ("dec5", 14, 14, 256),
    )
    + _both_branches(_VDN_DECODER)
)

#: Output sizes of the discriminator at resolution 224.
DISC_TABLE = _rows(
    ("disc1", 112, 112, 32),
    ("disc2", 56, 56, 64),
    ("disc3", 28, 28, 128),
    ("disc4", 14, 14, 256),
    ("fc5", 1, 1, 1),
)

TABLES = {"vsn": VSN_TABLE, "vdn": VDN_TABLE, "disc": DISC_TABLE}
