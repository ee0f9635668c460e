"""Fictitious-domain penalty solver for compressible heat-conducting self-gravitating flow."""
