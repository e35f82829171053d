"""Core module for jd-bss."""
