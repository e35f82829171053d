"""Managers module for jd-bss."""
