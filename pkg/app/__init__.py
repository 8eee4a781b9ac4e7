# kgprobe
