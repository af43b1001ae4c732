# DOM, templates, CPA, device groups and per-device diagnostics
