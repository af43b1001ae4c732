# Synthetic AES traces
