# Trace sets, configuration models and the binary trace container
