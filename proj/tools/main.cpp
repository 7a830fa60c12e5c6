#include "rearec/cli.hpp"

int main(int argc, char** argv) { return rearec::cli::dispatch(argc, argv); }
