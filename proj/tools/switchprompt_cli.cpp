#include "switchprompt/cli.hpp"

int main(int argc, char** argv) { return switchprompt::run_cli(argc, argv); }
