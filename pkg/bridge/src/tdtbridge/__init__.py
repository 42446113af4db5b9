"""Bridge from pretrained token-and-duration transducers to bundle files."""

from .backends import BackendError, FakeTdtBackend, load_backend
from .bundles import BundleError, DecodedToken, DecodedUtterance, write_bundle, write_manifest
from .extract import ExtractionJob, extract

__version__ = "0.1.0"
