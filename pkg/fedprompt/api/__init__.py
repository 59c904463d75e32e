# Transport: wire codec, federation server and client
