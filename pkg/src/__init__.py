# Init file for the safepd package
