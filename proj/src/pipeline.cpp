namespace palign {}
