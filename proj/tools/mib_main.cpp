#include "mib/cli.hpp"

int main(int argc, char** argv) { return mib::cli::run(argc, argv); }
