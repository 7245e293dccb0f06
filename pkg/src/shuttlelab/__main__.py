from shuttlelab.cli import main

main()
