"""Small meshes shipped with the package (regenerate with examples/build_meshes.py)."""

from importlib import resources

from ..mesh import load_tet_mesh, load_tri_mesh

PLANAR = ("square", "parallelogram", "disk", "plate", "rocker")
VOLUME = ("box", "thin_disk", "cylinder", "ball")


def path(name):
    p = resources.files(__name__) / f"{name}.mesh"
    if not p.is_file():
        raise KeyError(f"no bundled mesh named {name!r}")
    return p


def load(name):
    return load_tri_mesh(path(name)) if name in PLANAR else load_tet_mesh(path(name))
