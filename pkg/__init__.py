from . import nfsf

__all__ = ["nfsf"]
