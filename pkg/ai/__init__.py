# AI module: prompt assembly, completion backends and label extraction
