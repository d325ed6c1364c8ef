"""Hot-function autotuning by page-level capture and replay on a paged micro-VM."""
